# Paquete principal del sistema de restauración y enhancement