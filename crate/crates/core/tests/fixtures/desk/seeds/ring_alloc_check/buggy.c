static int acme_init_ring(struct acme_priv *priv)
{
	struct acme_desc *ring;
	int i;

	ring = kcalloc(priv->ring_size, sizeof(*ring), GFP_KERNEL);
	for (i = 0; i < priv->ring_size; i++)
		acme_init_desc(&ring[i], i);
	priv->ring = ring;
	priv->head = 0;
	return 0;
}
