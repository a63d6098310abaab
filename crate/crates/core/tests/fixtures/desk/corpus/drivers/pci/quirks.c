static void foo_quirk_setup(struct foo_host *host)
{
	struct pci_dev *pdev;
	u32 val;

	host->quirks = 0;
	pdev = pci_get_device(PCI_VENDOR_ID_FOO, PCI_DEVICE_ID_FOO_HB, NULL);
	if (!pdev) {
		host->quirks |= FOO_NO_HOSTBRIDGE;
		return;
	}

	pci_read_config_dword(pdev, FOO_CFG_REG, &val);
	host->cfg = val;
	host->rev = pdev->revision;
	if (val & FOO_CFG_LEGACY)
		host->quirks |= FOO_LEGACY_IRQ;
}

static int baz_count_bridges(void)
{
	struct pci_dev *pdev = NULL;
	int n = 0;

	while ((pdev = pci_get_class(PCI_CLASS_BRIDGE_PCI << 8, pdev)))
		n++;
	return n;
}

static void quirk_disable_msi(struct pci_dev *dev)
{
	if (dev->subordinate) {
		pci_warn(dev, "MSI quirk detected; subordinate MSI disabled\n");
		dev->subordinate->bus_flags |= PCI_BUS_FLAGS_NO_MSI;
	}
}

static void quirk_resource_alignment(struct pci_dev *dev)
{
	int i;
	struct resource *r;

	for (i = 0; i < PCI_ROM_RESOURCE; i++) {
		r = &dev->resource[i];
		if (!(r->flags & IORESOURCE_MEM))
			continue;
		if (resource_size(r) < PAGE_SIZE) {
			r->end = PAGE_SIZE - 1;
			r->start = 0;
			r->flags |= IORESOURCE_UNSET;
		}
	}
}

static int pci_count_functions(struct pci_bus *bus)
{
	struct pci_dev *dev;
	int n = 0;

	list_for_each_entry(dev, &bus->devices, bus_list) {
		if (PCI_FUNC(dev->devfn) != 0)
			n++;
	}
	return n;
}

static u16 quirk_read_vendor(struct pci_bus *bus, unsigned int devfn)
{
	struct pci_dev *dev;
	u16 vendor = 0;

	dev = pci_get_slot(bus, devfn);
	if (dev) {
		pci_read_config_word(dev, PCI_VENDOR_ID, &vendor);
		pci_dev_put(dev);
	}
	return vendor;
}
