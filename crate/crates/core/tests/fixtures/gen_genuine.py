"""Regenerates the genuine TFLite and ONNX fixtures with the upstream toolchains.

Run from this directory: python3 gen_genuine.py
"""
import os

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

import numpy as np
import tensorflow as tf
import torch

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "models")


def tflite_small_cnn():
    tf.keras.utils.set_random_seed(7)
    inp = tf.keras.Input(shape=(8, 8, 3), batch_size=1, name="image")
    x = tf.keras.layers.Conv2D(4, 3, padding="same", activation="relu", name="conv")(inp)
    x = tf.keras.layers.DepthwiseConv2D(3, strides=2, padding="same", name="dwconv")(x)
    x = tf.keras.layers.MaxPooling2D(2, name="pool")(x)
    x = tf.keras.layers.Flatten(name="flatten")(x)
    out = tf.keras.layers.Dense(3, name="logits")(x)
    model = tf.keras.Model(inp, out)
    conv = tf.lite.TFLiteConverter.from_keras_model(model)
    blob = conv.convert()
    with open(os.path.join(OUT, "small_cnn.tflite"), "wb") as f:
        f.write(blob)


class TinyNet(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = torch.nn.Conv2d(3, 4, 3, padding=1)
        self.dw = torch.nn.Conv2d(4, 4, 3, stride=2, padding=1, groups=4)
        self.fc = torch.nn.Linear(4 * 4 * 4, 5)

    def forward(self, x):
        x = torch.relu(self.conv(x))
        x = self.dw(x)
        x = torch.flatten(x, 1)
        return self.fc(x)


def onnx_tiny_net():
    torch.manual_seed(7)
    model = TinyNet().eval()
    torch.onnx.export(
        model,
        torch.zeros(1, 3, 8, 8),
        os.path.join(OUT, "tiny_net.onnx"),
        input_names=["input"],
        output_names=["logits"],
        opset_version=13,
        dynamo=False,
    )


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    tflite_small_cnn()
    onnx_tiny_net()
