# VFDM pipeline modules
