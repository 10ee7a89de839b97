#include <cstdio>
int main() { std::puts("invstore"); return 0; }
