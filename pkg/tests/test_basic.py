"""基本動作テスト

実装が正しく動作するかの基本テスト
"""
import sys
from pathlib import Path

# プロジェクトルートをパスに追加
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))


def test_imports():
    """すべての主要モジュールがインポートできることを確認"""
    print("Testing imports...")

    from src.models import BoxPair, DetectionSet, ClipRecord, Sample, EvalReport, RunManifest  # noqa: F401
    from src.config import Config  # noqa: F401
    from src.errors import AnactoError  # noqa: F401
    from src.utils.logger import setup_logger  # noqa: F401
    from src.utils.reporter import Reporter  # noqa: F401
    from src.numeric.tensor import Tape, Tensor, grad  # noqa: F401
    from src.world.scene import generate_clips  # noqa: F401
    from src.pipeline.dataset import build_samples  # noqa: F401
    from src.network.anacto import AnactoModel  # noqa: F401
    from src.training.trainer import Trainer  # noqa: F401
    from src.evaluation.evaluator import evaluate  # noqa: F401
    from src.main import main  # noqa: F401

    print("✓ All modules imported successfully")


def test_config_loading():
    """config.yaml が読み込めてバリデーションを通ることを確認"""
    print("\nTesting config loading...")

    from src.config import Config

    config_path = project_root / "config.yaml"
    assert config_path.exists(), f"Config file not found: {config_path}"

    config = Config.load(str(config_path))
    print("✓ Config loaded successfully")

    errors = config.validate()
    assert not errors, f"Config validation failed: {errors}"
    assert config.model.num_patches == 16
    assert config.training.sgd.learning_rate == 1e-5

    print("✓ Config validation passed")


def test_config_overrides():
    """プリセット・環境変数・不正値の扱いを確認"""
    print("\nTesting config overrides...")

    import os
    from src.config import Config

    config = Config.from_dict({'model': {'preset': 'vit_base', 'num_frames': 4}})
    assert config.model.embed_dim == 768
    assert config.model.num_frames == 4

    os.environ['ANACTO_LOG_LEVEL'] = 'debug'
    try:
        assert Config.from_dict({}).logging.level == 'DEBUG'
    finally:
        del os.environ['ANACTO_LOG_LEVEL']

    for bad in ({'model': {'preset': 'huge'}}, {'scene': {'no_such_key': 1}}):
        try:
            Config.from_dict(bad)
        except ValueError:
            pass
        else:
            raise AssertionError(f"Config accepted {bad}")

    mismatch = Config.from_dict({'scene': {'num_categories': 4, 'num_objects': 3}})
    assert any('num_categories' in e for e in mismatch.validate())

    print("✓ Config overrides behave as expected")


def test_data_models():
    """主要データモデルの基本的な挙動を確認"""
    print("\nTesting data models...")

    import numpy as np
    from src.models import BoxPair, ClipWindows, DetectionSet, EvalReport

    pair = BoxPair.from_slots((5.0, 5.0, 2.0, 2.0), None)
    assert pair.any_valid()
    assert pair.mask().tolist() == [1.0] * 4 + [0.0] * 4
    assert BoxPair.from_dict(pair.to_dict()).vector().tolist() == pair.vector().tolist()

    try:
        BoxPair(np.ones((2, 4)), np.array([True, False]))
    except ValueError:
        pass
    else:
        raise AssertionError("BoxPair accepted a non-zero invalid slot")

    detections = DetectionSet.empty(3)
    assert detections.is_empty(0)
    try:
        DetectionSet(np.zeros((1, 4)), np.array([1.5]))
    except ValueError:
        pass
    else:
        raise AssertionError("DetectionSet accepted a score above 1")

    try:
        ClipWindows(tau_o=1.0, tau_a=0.5, tau_s=5.0, num_frames=2, sampled_indices=(4, 4))
    except ValueError:
        pass
    else:
        raise AssertionError("ClipWindows accepted repeated indices")

    report = EvalReport(ap={0.05: 1.0, 0.5: 0.5}, ap_avg=0.75, n_clips=2, model_id='m', tau_a=0.25)
    assert EvalReport.from_dict(report.to_dict()) == report

    print("✓ Data models behave as expected")


def test_error_exit_codes():
    """例外クラスと終了コードの対応を確認"""
    print("\nTesting error exit codes...")

    from src.errors import AnactoError, DataError, GradientError, NumericError, UsageError

    assert UsageError.exit_code == 1
    assert DataError.exit_code == 2
    assert NumericError.exit_code == 3
    assert issubclass(GradientError, NumericError)
    assert all(issubclass(cls, AnactoError) for cls in (UsageError, DataError, NumericError))

    print("✓ Exit codes are consistent")


def run_test(name, func):
    try:
        func()
        print(f"PASS   - {name}")
        return True
    except AssertionError as e:
        print(f"FAIL   - {name}: {e}")
        return False
    except Exception as e:
        print(f"ERROR  - {name}: {e}")
        return False


def main():
    """メインテスト実行"""
    print("=" * 60)
    print("ANACTO - Basic Tests")
    print("=" * 60)

    tests = [
        ("Import Test", test_imports),
        ("Config Loading Test", test_config_loading),
        ("Config Overrides Test", test_config_overrides),
        ("Data Models Test", test_data_models),
        ("Error Exit Codes Test", test_error_exit_codes),
    ]

    results = [(name, run_test(name, func)) for name, func in tests]

    passed = sum(1 for _, result in results if result)
    total = len(results)

    print("-" * 60)
    print(f"Total: {passed}/{total} tests passed")
    print("=" * 60)

    return passed == total


if __name__ == '__main__':
    success = main()
    sys.exit(0 if success else 1)
