fn main() {
    std::process::exit(mvm_control::cli::main());
}
