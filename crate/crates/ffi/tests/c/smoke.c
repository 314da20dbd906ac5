#include <math.h>
#include <stdio.h>
#include "altseq.h"

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "failed: %s (line %d)\n", #cond, __LINE__);     \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  AltseqModel *m = NULL;
  CHECK(altseq_model_new(1e-3, 3, 1e-9, &m) == ALTSEQ_STATUS_OK);

  double v = 0.0;
  CHECK(altseq_value(m, 2, 0.0, &v) == ALTSEQ_STATUS_OK);
  CHECK(fabs(v - 1.5) < 1e-5);

  double xi3 = 0.0;
  CHECK(altseq_xi(m, 3, &xi3) == ALTSEQ_STATUS_OK);
  CHECK(fabs(xi3 - 1.0 / 6.0) < 1e-4);

  double xs[3] = {0.9, 0.9, 0.1};
  uint32_t sel = 0;
  double y = 0.0;
  CHECK(altseq_run_policy(m, ALTSEQ_POLICY_LIMIT, 0.0, xs, 3, &sel, &y) == ALTSEQ_STATUS_OK);
  CHECK(sel == 2);

  CHECK(altseq_value(m, 9, 0.0, &v) == ALTSEQ_STATUS_INVALID_ARGUMENT);
  char msg[128];
  CHECK(altseq_last_error_message(msg, sizeof msg) > 0);

  altseq_model_free(m);
  printf("ok %s\n", altseq_version());
  return 0;
}
