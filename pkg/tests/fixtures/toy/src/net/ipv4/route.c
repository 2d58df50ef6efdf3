#include <linux/kernel.h>
#include "route.h"

/* route: ipv4 support */
static int route_count;

/* initialize route */
int route_init(void)
{
	route_count = 0;
	return 0;
}

static void route_update(int value)
{
	route_count += value;
}

void route_exit(void)
{
	route_update(-route_count);
}
