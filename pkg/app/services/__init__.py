"""
Domain services.

corpus      raw documents to tagged, split sentence records
backend     model handles, forward passes, gradients, checkpoints
training    mini-batch loop shared by generator and classifier training
generation  fine-tuning, seeded generation and post-processing
detector    style classifier, agreement and confidence filtering
synfeat     syntactic features, histograms and divergences
xai         attention enrichment and integrated gradients
plotdata    CSV files behind figures and tables
pipeline    stages with manifests and atomic outputs
"""
