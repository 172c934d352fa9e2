# Sensing evaluation module
