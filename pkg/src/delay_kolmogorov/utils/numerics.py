"""
小さな次元での決定的な縮約演算

バッチの形（レプリケート数）に依らず同じ浮動小数点結果になるよう，
種・ドライバ方向の和はすべて左から順に足し合わせる．
"""

from __future__ import annotations

import numpy as np


def matvec(matrix: np.ndarray, x: np.ndarray) -> np.ndarray:
    """out[..., i] = sum_j matrix[i, j] * x[..., j]

    Args:
        matrix: (n, k) の係数行列
        x: (..., k) の配列

    Returns:
        (..., n) の配列
    """
    matrix = np.asarray(matrix, dtype=float)
    out = x[..., 0:1] * matrix[:, 0]
    for j in range(1, matrix.shape[1]):
        out = out + x[..., j : j + 1] * matrix[:, j]
    return out


def rowsum(x: np.ndarray) -> np.ndarray:
    """最終軸の和（左から順に加算）"""
    out = x[..., 0]
    for j in range(1, x.shape[-1]):
        out = out + x[..., j]
    return out


def rowsum_squares(g: np.ndarray) -> np.ndarray:
    """sum_j G_ij^2 を (..., n, m) から (..., n) で返す"""
    return rowsum(g * g)


def rows_times_vector(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sum_j G_ij v_j を (..., n, m) と (..., m) から計算"""
    return rowsum(g * v[..., None, :])
