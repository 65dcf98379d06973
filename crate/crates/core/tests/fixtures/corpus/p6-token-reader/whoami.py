import os

token = os.environ["GITHUB_TOKEN"]
print("token scopes:", token.split("_")[0])
