#include <stdio.h>
#include "troubleshoot.h"

int run(const char *model_path) {
    TsEngine *engine = NULL;
    char *out = NULL;
    if (ts_engine_open(model_path, NULL, &engine) != TS_STATUS_OK) {
        fprintf(stderr, "%s\n", ts_last_error());
        return 1;
    }
    TsStatus st = ts_diagnose_json(engine, "{\"text\": \"brake cable\"}", &out);
    if (st == TS_STATUS_OK) {
        puts(out);
        ts_string_free(out);
    }
    ts_engine_free(engine);
    return st == TS_STATUS_OK ? 0 : (int)st;
}
