"""From-scratch neural networks: MLP regressor, autoencoders, ADAM, training."""
from .layers import (BatchNorm2d, Conv2d, Dense, Dropout, LeakyReLU, MaxPool2d, ReLU, Reshape,
                     Sequential, Sigmoid, Tanh, Upsample2x)
from .models import MLP, FULL_SCALE, ConvAE, MlpAE, build_model, shape_table
from .optim import Adam, cosine_lr
from .train import (History, Regressor, TrainConfig, fit, load_model, load_regressor, mse,
                    predict_batched, save_model, save_regressor, train_autoencoder,
                    train_regressor)

__all__ = [
    "Adam", "BatchNorm2d", "Conv2d", "ConvAE", "Dense", "Dropout", "History", "LeakyReLU", "MLP",
    "MaxPool2d", "MlpAE", "FULL_SCALE", "ReLU", "Regressor", "Reshape", "Sequential", "Sigmoid",
    "Tanh", "TrainConfig", "Upsample2x", "build_model", "cosine_lr", "fit", "load_model",
    "load_regressor", "mse", "predict_batched", "save_model", "save_regressor", "shape_table",
    "train_autoencoder", "train_regressor",
]
