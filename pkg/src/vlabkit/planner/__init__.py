"""Motion generation: kinematics, RRT, grasp rejection sampling and skill expansion."""
