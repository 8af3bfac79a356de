# placeholder, filled in below
def __getattr__(name):
    raise NotImplementedError("module under construction")
