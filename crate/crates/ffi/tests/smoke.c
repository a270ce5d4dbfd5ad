#include <stdio.h>
#include "mindformer.h"

int main(int argc, char **argv) {
    if (argc != 2) return 2;
    MfModel *m = NULL;
    if (mf_model_load(argv[1], &m) != MF_STATUS_OK) {
        fprintf(stderr, "%s\n", mf_last_error());
        return 1;
    }
    size_t n = 0, d = 0;
    uint64_t params = 0;
    mf_model_dims(m, &n, &d);
    mf_model_param_count(m, &params);
    printf("dims %zu %zu\nparams %llu\n", n, d, (unsigned long long)params);

    float v[10], z[64];
    for (int i = 0; i < 10; i++) v[i] = (float)i / 10.0f;
    if (mf_model_forward(m, "s1", v, 10, z, 64) != MF_STATUS_OK) {
        fprintf(stderr, "%s\n", mf_last_error());
        return 1;
    }
    printf("z0 %.6f\n", z[0]);
    printf("unknown %d\n", (int)mf_model_forward(m, "zz", v, 10, z, 64));
    mf_model_free(m);
    return 0;
}
