"""Memory transfer planning: retrieve, adapt and replay successful robot programs."""
