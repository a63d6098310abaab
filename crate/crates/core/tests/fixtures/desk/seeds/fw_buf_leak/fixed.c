static int acme_fw_load(struct acme_dev *adev, const char *name)
{
	const struct firmware *fw;
	u8 *buf;
	int ret;

	ret = request_firmware(&fw, name, adev->dev);
	if (ret)
		return ret;

	buf = kmemdup(fw->data, fw->size, GFP_KERNEL);
	if (!buf) {
		release_firmware(fw);
		return -ENOMEM;
	}

	ret = acme_fw_check(adev, buf, fw->size);
	if (ret) {
		release_firmware(fw);
		kfree(buf);
		return ret;
	}

	adev->fw_buf = buf;
	release_firmware(fw);
	return 0;
}
