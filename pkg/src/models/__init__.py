from src.models.hybrid import HybridModel, build_model
