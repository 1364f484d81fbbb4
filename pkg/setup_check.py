#!/usr/bin/env python3
"""
Environment check for HDSW: interpreter, packages, .env and a dataset to train on.
"""
import importlib
import os
import platform
import sys

REQUIRED = ["numpy", "yaml", "dotenv", "networkx", "rich", "tqdm"]
OPTIONAL = {"PIL": "PNG/JPEG decoding (PPM works without it)", "pytest": "running the test suite"}

ENV_TEMPLATE = (
    "# run seed used when neither --seed nor data.seed is given\n"
    "HDSW_SEED=0\n"
    "# DEBUG, INFO or WARNING\n"
    "HDSW_LOG_LEVEL=INFO\n"
)


def check_packages() -> bool:
    ok = True
    for name in REQUIRED:
        try:
            mod = importlib.import_module(name)
            print(f"  ✅ {name} {getattr(mod, '__version__', '')}".rstrip())
        except ImportError:
            print(f"  ❌ {name} missing")
            ok = False
    for name, purpose in OPTIONAL.items():
        try:
            importlib.import_module(name)
            print(f"  ✅ {name} (optional)")
        except ImportError:
            print(f"  ⚠️  {name} not installed, needed for {purpose}")
    return ok


def main():
    print("🚀 HDSW Setup Check")
    print("=" * 60)
    print(f"✅ Detected OS: {platform.system()}")

    py_version = sys.version_info
    print(f"\n🐍 Python Version: {py_version.major}.{py_version.minor}.{py_version.micro}")
    if py_version < (3, 8):
        print("  ⚠️  Warning: Python 3.8+ required")
    else:
        print("  ✅ Python version OK")

    print("\n📦 Checking packages...")
    packages_ok = check_packages()
    if not packages_ok:
        print("  Run: pip install -r requirements.txt")

    print("\n🔑 Checking .env...")
    if os.path.exists(".env"):
        with open(".env", "r", encoding="utf-8") as f:
            keys = {line.split("=", 1)[0].strip() for line in f if "=" in line and not line.startswith("#")}
        for key in ("HDSW_SEED", "HDSW_LOG_LEVEL"):
            print(f"  {'✅' if key in keys else '➖'} {key} {'set' if key in keys else 'not set (default used)'}")
    else:
        print("  ➖ .env file not found, creating template...")
        try:
            with open(".env", "w", encoding="utf-8") as f:
                f.write(ENV_TEMPLATE)
            print("  ✅ Created .env with HDSW_SEED and HDSW_LOG_LEVEL")
        except OSError as e:
            print(f"  ⚠️  Could not create .env: {e}")

    print("\n📁 Checking for a dataset...")
    manifests = []
    if os.path.isdir("data"):
        for root, _, files in os.walk("data"):
            manifests += [os.path.join(root, f) for f in files if f == "manifest.tsv"]
    if manifests:
        print(f"  ✅ Found manifests: {', '.join(sorted(manifests))}")
    else:
        print("  ⚠️  No manifest.tsv under data/")
        print("  Run: python main.py gen-synthetic --out data/synth --per-class 10")

    print("\n" + "=" * 60)
    print("✅ Setup check complete!" if packages_ok else "❌ Setup check found missing packages")
    print("\n📚 Next steps:")
    print("  1. python main.py inspect --variant all --shapes-only")
    print("  2. python main.py train --manifest data/synth/manifest.tsv --seed 0")
    print("  3. python main.py eval --checkpoint runs/desk/final.hdsw --manifest data/synth/manifest.tsv --out runs/desk/eval")
    print("=" * 60)
    return 0 if packages_ok else 1


if __name__ == "__main__":
    sys.exit(main())
