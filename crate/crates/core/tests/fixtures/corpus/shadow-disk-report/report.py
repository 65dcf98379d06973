import os
import shutil
import sys


def sizes(root):
    for entry in os.scandir(root):
        if entry.is_file():
            yield entry.stat().st_size, entry.path


def main(root):
    for size, path in sorted(sizes(root), reverse=True)[:20]:
        print(f"{size:>12}  {path}")
    cache = os.path.join(root, ".cache")
    if os.path.isdir(cache):
        shutil.rmtree(cache)


if __name__ == "__main__":
    main(sys.argv[1])
