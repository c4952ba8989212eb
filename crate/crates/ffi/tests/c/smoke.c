#include <math.h>
#include <stdio.h>
#include <string.h>

#include "xtsformer.h"

#define CHECK(cond)                                           \
    do {                                                      \
        if (!(cond)) {                                        \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            return 1;                                         \
        }                                                     \
    } while (0)

int main(void) {
    const double times[9] = {0, 1, 3.5, 4.6, 10, 11.2, 20, 23, 26.5};
    const size_t counts[4] = {2, 2, 3, 1};
    XtsHierarchy *h = NULL;
    CHECK(xts_hierarchy_build_with_counts(times, 9, counts, 4, &h) == XTS_STATUS_OK);
    CHECK(xts_hierarchy_num_scales(h) == 4);

    size_t ids[8];
    size_t n = 0;
    CHECK(xts_hierarchy_frontier(h, 2, ids, 8, &n) == XTS_STATUS_OK);
    CHECK(n == 4 && ids[3] == 5);
    CHECK(xts_hierarchy_frontier(h, 3, ids, 1, &n) == XTS_STATUS_BUFFER_TOO_SMALL);
    CHECK(xts_last_error_message() != NULL);

    char *json = NULL;
    CHECK(xts_hierarchy_to_json(h, &json) == XTS_STATUS_OK);
    CHECK(strstr(json, "\"num_leaves\":9") != NULL);
    xts_string_free(json);
    xts_hierarchy_free(h);

    const double bad[3] = {0, 2, 1};
    h = NULL;
    CHECK(xts_hierarchy_build(bad, 3, 1, &h) != XTS_STATUS_OK);
    CHECK(h == NULL);

    CHECK(xts_weibull_nll(1.0, 1.0, 1.0) == 1.0);
    CHECK(fabs(xts_weibull_mean(3.0, 1.0) - 3.0) < 1e-12);

    uint64_t cross = 0, dense = 0;
    size_t sizes[8] = {4, 4, 4, 4, 4, 4, 4, 4};
    CHECK(xts_count_attention_flops(8, 1, 2, 16, sizes, 8, &cross, &dense) == XTS_STATUS_OK);
    CHECK(cross == 1024 && dense == 2048);

    XtsModel *m = NULL;
    CHECK(xts_model_load("/nonexistent/checkpoint.json", &m) == XTS_STATUS_IO);
    CHECK(m == NULL);

    printf("ok %s\n", xts_version());
    return 0;
}
