"""Instance generation and data ingestion."""
