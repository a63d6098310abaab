static int acme_open(struct net_device *ndev)
{
	struct acme_priv *priv = netdev_priv(ndev);
	int err;

	err = request_irq(ndev->irq, acme_interrupt, 0, ndev->name, ndev);
	if (err)
		return err;

	err = acme_hw_start(priv);
	if (err) {
		netdev_err(ndev, "hw start failed\n");
		free_irq(ndev->irq, ndev);
		return err;
	}

	netif_start_queue(ndev);
	return 0;
}
