"""Tree-structured nonnegative embeddings for matrix completion."""
