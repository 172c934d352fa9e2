# Beamforming design module
