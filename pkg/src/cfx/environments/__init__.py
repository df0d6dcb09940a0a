"""Reference environments: the planner/actor gridworld and a sepsis-style simulator."""
