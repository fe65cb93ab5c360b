fn main() {
    std::process::exit(actlab::run_cli());
}
