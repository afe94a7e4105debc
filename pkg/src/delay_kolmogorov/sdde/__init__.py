# SDDE integrator package for delay_kolmogorov
