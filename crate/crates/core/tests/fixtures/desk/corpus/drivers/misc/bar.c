static int bar_update_state(struct bar_priv *priv, unsigned int state)
{
	int err;

	mutex_lock(&priv->mutex);
	if (!priv->enabled)
		return -ENODEV;

	err = regmap_write(priv->map, BAR_STATE, state);
	if (err) {
		mutex_unlock(&priv->mutex);
		return err;
	}
	priv->state = state;
	mutex_unlock(&priv->mutex);
	return 0;
}

static int bar_set_enabled(struct bar_priv *priv, bool on)
{
	int err;

	mutex_lock(&priv->mutex);
	err = regmap_write(priv->map, BAR_CTRL, on ? BAR_CTRL_ON : 0);
	if (!err)
		priv->enabled = on;
	mutex_unlock(&priv->mutex);
	return err;
}

static ssize_t bar_state_show(struct device *dev, struct device_attribute *attr, char *buf)
{
	struct bar_priv *priv = dev_get_drvdata(dev);
	unsigned int state;

	mutex_lock(&priv->mutex);
	state = priv->state;
	mutex_unlock(&priv->mutex);

	return sprintf(buf, "%u\n", state);
}

static ssize_t bar_state_store(struct device *dev, struct device_attribute *attr,
			       const char *buf, size_t count)
{
	struct bar_priv *priv = dev_get_drvdata(dev);
	unsigned int val;
	int err;

	err = kstrtouint(buf, 0, &val);
	if (err)
		return err;
	if (val > BAR_STATE_MAX)
		return -EINVAL;

	err = bar_update_state(priv, val);
	if (err)
		return err;
	return count;
}

static int bar_probe(struct i2c_client *client)
{
	struct bar_priv *priv;
	int err;

	priv = devm_kzalloc(&client->dev, sizeof(*priv), GFP_KERNEL);
	if (!priv)
		return -ENOMEM;

	mutex_init(&priv->mutex);
	priv->map = devm_regmap_init_i2c(client, &bar_regmap_config);
	if (IS_ERR(priv->map))
		return PTR_ERR(priv->map);

	i2c_set_clientdata(client, priv);
	err = sysfs_create_group(&client->dev.kobj, &bar_attr_group);
	if (err)
		dev_err(&client->dev, "sysfs group failed\n");
	return err;
}

static int bar_flush(struct bar_priv *priv)
{
	int err;

	mutex_lock(&priv->mutex);
	if (priv->pending == 0) {
		mutex_unlock(&priv->mutex);
		return 0;
	}
	err = regmap_write(priv->map, BAR_FLUSH, priv->pending);
	priv->pending = 0;
	mutex_unlock(&priv->mutex);
	return err;
}
