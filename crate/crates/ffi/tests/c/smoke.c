#include <math.h>
#include <stdio.h>
#include "brc.h"

int main(void) {
    double h[4];
    BrcStability st[4];
    size_t n = 0;
    if (brc_fixed_points(1.5, 0.5, 0.0, h, st, 4, &n) != BRC_STATUS_OK || n != 3) return 1;
    if (st[0] != BRC_STABILITY_STABLE || st[1] != BRC_STABILITY_UNSTABLE) return 2;

    size_t layers[2] = {4, 3};
    BrcNetwork *net = NULL;
    if (brc_network_new(BRC_CELL_NBRC, layers, 2, 1, 1, false, 7, &net) != BRC_STATUS_OK) return 3;
    double seq[5] = {1, 0, 0, 0, 0};
    double y = NAN;
    if (brc_network_forward(net, seq, 5, 1, &y, 1) != BRC_STATUS_OK || isnan(y)) return 4;
    if (brc_network_forward(net, seq, 5, 2, &y, 1) != BRC_STATUS_SHAPE) return 5;
    if (brc_last_error()[0] == '\0') return 6;
    brc_network_free(net);
    printf("%.17g %zu\n", h[2], n);
    return 0;
}
