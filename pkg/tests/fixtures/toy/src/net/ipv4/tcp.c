#include <linux/kernel.h>
#include "tcp.h"

/* tcp: ipv4 support */
static int tcp_count;

/* initialize tcp */
int tcp_init(void)
{
	tcp_count = 0;
	return 0;
}

static void tcp_update(int value)
{
	tcp_count += value;
}

void tcp_exit(void)
{
	tcp_update(-tcp_count);
}
