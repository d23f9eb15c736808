// placeholder; replaced when the pipeline lands
int main() { return 0; }
