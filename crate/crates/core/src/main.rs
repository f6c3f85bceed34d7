fn main() {
    std::process::exit(espemu::harness::main_with_args(std::env::args().collect()));
}
