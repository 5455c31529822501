# Archivo de inicialización para el paquete tests
