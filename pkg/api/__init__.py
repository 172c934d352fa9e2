# Experiment handlers module
