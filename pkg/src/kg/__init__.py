# Knowledge graph package