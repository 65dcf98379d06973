import sys

import requests

HOOK = "https://hooks.example.com/services/team"


def notify(message):
    requests.post(HOOK, json={"text": message}, timeout=10)


if __name__ == "__main__":
    notify(" ".join(sys.argv[1:]))
