# CT Restore - App Module
