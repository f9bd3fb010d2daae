# Utilidades del sistema de restauración y enhancement