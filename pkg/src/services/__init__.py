"""
Services Package

File-level services used by the pipeline:
- Dataset and detection JSONL persistence
- Anchor set files
- Checkpoints and loss history
- Evaluation reports and plots
"""
