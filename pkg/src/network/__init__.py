# Network package