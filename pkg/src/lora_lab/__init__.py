"""Width-scaling laboratory for LoRA initialization schemes."""
