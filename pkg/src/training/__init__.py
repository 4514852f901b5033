# Training package