# Archivo de inicialización para el paquete core
# Funciones puras: geometría de esferas, pérdidas, asignación, decodificación y FROC
