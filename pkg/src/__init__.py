# SMC smoother package