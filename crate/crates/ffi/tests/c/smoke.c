#include <stdio.h>
#include <string.h>
#include "allab.h"

static const char *CONFIG =
    "{\"dataset\": {\"source\": {\"kind\": \"gaussian_mixture\", \"num_classes\": 2, \"dim\": 3,"
    " \"n_per_class\": 40, \"class_sep\": 4.0}},"
    " \"strategy\": \"entropy\", \"num_cycles\": 2, \"budget_per_cycle\": 5, \"trials\": 1,"
    " \"split\": {\"initial_labeled\": 10},"
    " \"learner\": {\"hidden_sizes\": [8], \"epochs\": 5, \"batch_size\": 8}}";

int main(void) {
    AllabConfig *cfg = NULL;
    AllabResult *res = NULL;
    size_t cycles = 0, labeled = 0;
    double mean = 0.0, std = 0.0;
    char hash[65];

    if (allab_config_parse("{\"strategy\": \"\"}", &cfg) != ALLAB_STATUS_CONFIG_ERROR || cfg != NULL) return 1;
    if (allab_last_error() == NULL || strstr(allab_last_error(), "strategy") == NULL) return 2;
    if (allab_config_parse(CONFIG, &cfg) != ALLAB_STATUS_OK) return 3;
    if (allab_config_hash(cfg, hash, sizeof hash) != ALLAB_STATUS_OK || strlen(hash) != 64) return 4;
    if (allab_run(cfg, 1, &res) != ALLAB_STATUS_OK) return 5;
    if (allab_result_num_cycles(res, &cycles) != ALLAB_STATUS_OK || cycles != 2) return 6;
    if (allab_result_cycle(res, 1, &labeled, &mean, &std) != ALLAB_STATUS_OK || labeled != 15) return 7;
    if (mean < 0.0 || mean > 1.0 || std != 0.0) return 8;
    if (allab_result_cycle(res, 2, NULL, NULL, NULL) != ALLAB_STATUS_OUT_OF_RANGE) return 9;
    printf("allab %s: final accuracy %.3f\n", allab_version(), mean);
    allab_result_free(res);
    allab_config_free(cfg);
    return 0;
}
