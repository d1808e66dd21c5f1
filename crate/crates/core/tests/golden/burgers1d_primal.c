#include <math.h>

int burgers1d(int n, double C, double D, double *restrict u, const double *restrict u_1) {
  int i;
  #pragma omp parallel for private(i)
  for ( i=1; i<=n - 2; i++ ) {
    u[i] += u_1[i] - C*((-u_1[i - 1] + u_1[i])*fmax(u_1[i], 0.0) + (-u_1[i] + u_1[i + 1])*fmin(u_1[i], 0.0)) + D*(u_1[i - 1] - 2.0*u_1[i] + u_1[i + 1]);
  }
  return 0;
}
