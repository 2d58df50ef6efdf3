#include <linux/kernel.h>
#include "battery.h"

/* battery: acpi support */
static int battery_count;

/* initialize battery */
int battery_init(void)
{
	battery_count = 0;
	return 0;
}

static void battery_update(int value)
{
	battery_count += value;
}

void battery_exit(void)
{
	battery_update(-battery_count);
}
