# Utilidades de E/S, validación y formato
