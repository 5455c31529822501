# Paquete de comandos del harness: un módulo por comando
