"""
パッケージ共通の例外クラス
"""

from __future__ import annotations

from typing import Any, Optional


class KolmogorovError(Exception):
    """delay_kolmogorov の全例外の基底クラス"""


class ModelValidationError(KolmogorovError, ValueError):
    """モデルのパラメータ・雑音行列・遅延核が不正"""


class ConfigError(KolmogorovError, ValueError):
    """設定ファイルの読み込み・スキーマ検証の失敗"""


class CertificateError(KolmogorovError, ValueError):
    """監査用の証明書定数が自身の不変条件を満たさない"""


class NonFiniteCoefficientError(KolmogorovError, FloatingPointError):
    """係数にNaNが現れた．問題のセグメントを保持する"""

    def __init__(self, message: str, segment: Any = None, replicate: Optional[int] = None):
        super().__init__(message)
        self.segment = segment
        self.replicate = replicate


class DivergenceError(KolmogorovError):
    """ln X_i が発散上限を超えた（散逸性の破れを示唆）"""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report
