# Snippet relatedness-based temporal action proposal pipeline
