#!/usr/bin/env python3
"""
Startup verification script - run this before a long batch of tasks.
Checks dependencies, module imports, the bundled configs and one smoke divergence.
"""
import glob
import os
import sys
import logging

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s"
)


def check_imports():
    """Verify all third-party imports work"""
    checks = [
        ("NumPy", lambda: __import__("numpy")),
        ("pandas", lambda: __import__("pandas")),
        ("Pydantic", lambda: __import__("pydantic")),
        ("python-dotenv", lambda: __import__("dotenv")),
        ("Rich", lambda: __import__("rich")),
    ]

    failed = []
    for name, importer in checks:
        try:
            importer()
            logging.info(f"✅ {name}")
        except ImportError as e:
            logging.error(f"❌ {name}: {e}")
            failed.append(name)

    return len(failed) == 0


def check_app_imports():
    """Verify package modules import correctly"""
    modules = ["config", "errors", "expr", "exterior", "fields", "models", "sampling",
               "quad", "diver", "surface", "tasks", "main"]

    failed = []
    for name in modules:
        try:
            __import__(name)
            logging.info(f"✅ Module: {name}")
        except Exception as e:
            logging.error(f"❌ Module {name}: {e}")
            failed.append(name)

    return len(failed) == 0


def check_configs():
    """Verify every bundled config validates against the schema"""
    from config import CONFIG_DIR
    from errors import ConfigError
    from main import load_config

    paths = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.json")))
    if not paths:
        logging.error(f"❌ No bundled configs under {CONFIG_DIR}")
        return False
    ok = True
    for path in paths:
        try:
            load_config(path)
            logging.info(f"✅ Config: {os.path.basename(path)}")
        except ConfigError as e:
            logging.error(f"❌ Config {os.path.basename(path)}: {e}")
            ok = False
    return ok


def check_smoke_divergence():
    """div(x0, x1, x2) = 3 for the Lebesgue density"""
    try:
        import numpy as np
        from diver import VolumeStructure, div_vector
        from fields import ChartDomain, VectorField

        domain = ChartDomain.cube(3, -1.0, 1.0)
        field = VectorField(["x0", "x1", "x2"], domain, "X")
        values = div_vector(field, VolumeStructure.lebesgue(domain)).values(domain.grid(3))
        if not np.allclose(values, 3.0, atol=1e-12):
            logging.error(f"❌ Smoke divergence returned {values[:3]} instead of 3")
            return False
        logging.info("✅ Smoke divergence")
        return True
    except Exception as e:
        logging.error(f"❌ Smoke divergence: {e}")
        return False


if __name__ == "__main__":
    logging.info("=" * 60)
    logging.info("STARTUP VERIFICATION")
    logging.info("=" * 60)

    all_passed = True

    logging.info("\n[1/4] Checking external dependencies...")
    all_passed &= check_imports()

    logging.info("\n[2/4] Checking package modules...")
    all_passed &= check_app_imports()

    logging.info("\n[3/4] Checking bundled configs...")
    all_passed &= check_configs()

    logging.info("\n[4/4] Checking smoke divergence...")
    all_passed &= check_smoke_divergence()

    logging.info("\n" + "=" * 60)
    if all_passed:
        logging.info("✅ ALL CHECKS PASSED - Ready to run!")
        logging.info("=" * 60)
        sys.exit(0)
    else:
        logging.error("❌ SOME CHECKS FAILED - Fix issues before running")
        logging.info("=" * 60)
        sys.exit(1)
