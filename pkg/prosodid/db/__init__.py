# Feature storage
