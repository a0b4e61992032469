from fedconform.cli import entrypoint

entrypoint()
