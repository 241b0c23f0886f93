"""Protocol case studies written against the task runtime."""
