#include <cstdio>
int main() { std::puts("evbraille: placeholder"); return 0; }
