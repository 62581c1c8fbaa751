from src.models.data_models import * 