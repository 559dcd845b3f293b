"""Shipped system files and their JSON schema."""
